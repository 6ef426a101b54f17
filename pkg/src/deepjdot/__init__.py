"""Deep joint distribution optimal transport for unsupervised domain adaptation."""

__version__ = "0.1.0"
