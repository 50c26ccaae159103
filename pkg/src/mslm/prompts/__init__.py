"""Context-prompt assets for plan-program generation."""
