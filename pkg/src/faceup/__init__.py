"""faceup: progressive upsampling and inpainting of occluded face thumbnails."""

__version__ = "0.1.0"
