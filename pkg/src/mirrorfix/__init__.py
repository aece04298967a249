"""GNSS backscatter positioning toolkit.

Virtual-satellite absolute positioning, tag-differential carrier-phase
positioning, ON-OFF tag detection from C/N0, a deterministic measurement
simulator, and a tunnel-diode reflection amplifier calculator.
"""

__version__ = "0.1.0"

SPEED_OF_LIGHT = 299_792_458.0
GPS_L1_HZ = 1.57542e9
GPS_L1_WAVELENGTH = 0.19029367
