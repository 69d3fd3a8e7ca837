"""D2D scheduling under limited feedback."""
