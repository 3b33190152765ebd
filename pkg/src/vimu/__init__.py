"""Virtual IMU fusion toolkit."""
