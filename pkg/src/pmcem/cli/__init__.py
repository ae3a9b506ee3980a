"""Config-driven experiment pipeline: make-data, corrupt, run, eval, sample."""
