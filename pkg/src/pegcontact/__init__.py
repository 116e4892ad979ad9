"""Contact-pose identification for peg-in-hole assembly (simulation + learning)."""
