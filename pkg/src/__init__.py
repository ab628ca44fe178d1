"""Power-temperature fixed-point analysis and predictive thermal management."""
