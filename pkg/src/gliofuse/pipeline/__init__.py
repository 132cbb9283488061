"""Configuration, checkpoints, training loops and the command-line front end."""
