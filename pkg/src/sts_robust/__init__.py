"""Reference planning, robust LQR selection and ILC user-proxy evaluation
for the ascension phase of a sit-to-stand movement with a hip-actuated
lower-limb orthosis."""

__version__ = "0.1.0"
