"""Trust-region reduced-basis optimization for parametrized elliptic PDEs."""
