# ShapeBench Tests
