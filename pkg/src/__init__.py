"""
semg-limb-classifier - Surface-EMG limb action characterization.

Filters multi-channel sEMG recordings, extracts peak RMS features, normalizes
them against a chosen channel and classifies limb actions with an SVM. Finds
the electrode subsets that give the best accuracy for each channel count. 💪
"""

__version__ = "1.0.0"
