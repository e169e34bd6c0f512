"""
Mixture density network point detection

mixture     parameter constraints, densities, gated loss and its gradient
network     conv backbone + MDN head, training, Checkpoint
checkpoint  checkpoint file format
synthdata   synthetic scenes, dilation, patches, dataset files
pipeline    tiled inference, probability maps, peaks
evaluation  matching, metrics, experiments
mdresult    result records (detections, matches, metric reports)
mderror     exception hierarchy
runconfig   merged run configuration and config files
"""

__version__ = '1.0.0'
