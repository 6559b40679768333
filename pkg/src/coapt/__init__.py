"""CoAPT: attribute-word-augmented soft prompt tuning on a frozen dual encoder."""

__version__ = "0.1.0"
