"""LEO-aided 9D navigation: TLE propagation, beacon Doppler-rate extraction,
GPS/LEO/IMU extended Kalman filtering and posterior Cramer-Rao bounds."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, LeoNavError, NumericalError  # noqa: E402

__all__ = ["ConfigError", "DataError", "LeoNavError", "NumericalError", "__version__"]
