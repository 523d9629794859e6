"""Stochastic digital backpropagation for dual-polarization fiber links.

Modules: ``signal`` (pulses, waveforms), ``modem`` (4D constellations),
``channel`` (SSFM link model), ``sdbp`` (particle backpropagation), ``stats``
(window moments, branch metric), ``detectors`` (DBP, SBS, DD, VA),
``experiment`` (seeded SER sweeps) and ``cli``.
"""

__version__ = "0.1.0"
