# Test package for the phantom design toolkit
