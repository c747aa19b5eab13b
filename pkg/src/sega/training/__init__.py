"""Pre-training, fine-tuning, evaluation and embedding export."""
