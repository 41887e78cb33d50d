"""raincast: intensity-adaptive transformer kernels for rainfall nowcasting at desk scale."""

__version__ = "0.1.0"
