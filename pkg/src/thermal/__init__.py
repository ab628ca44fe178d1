"""Power-temperature models, fixed-point analysis and thermal governors."""
