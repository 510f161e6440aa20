"""Vehicle-to-VRU geomessaging simulator, message codecs and requirement grader."""

__version__ = "0.1.0"
