"""Words to grammar: POS induction, perceptual grounding and HDP-CCG induction."""

__version__ = "0.1.0"
