"""Dataset synthesis, training loops, reconstruction, and evaluation."""
