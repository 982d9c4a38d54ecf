"""Shape statistics, evaluation metrics and the clinical validation protocol."""
