"""probcam: desk-scale joint camera-pose / scene optimization with
learnable per-camera pose uncertainty.

The package is organized in layers:

- :mod:`probcam.geometry`   rotations, poses, pinhole rays
- :mod:`probcam.scene`      analytic SDF scenes, camera rigs, simulated matches
- :mod:`probcam.probpose`   probabilistic pose bank (means + log-variances)
- :mod:`probcam.confidence` static/dynamic per-camera confidence tracking
- :mod:`probcam.renderer`   differentiable volume rendering over SDF scenes
- :mod:`probcam.vda`        volumetric distribution alignment (voxelized IoU)
- :mod:`probcam.trainer`    joint optimization loop
- :mod:`probcam.evaluation` surface / pose metrics with similarity alignment
- :mod:`probcam.config`     experiment configs and presets
- :mod:`probcam.cli`        command-line entry point
- :mod:`probcam.testkit`    independent oracles used by the test suite
"""

__version__ = "0.1.0"
