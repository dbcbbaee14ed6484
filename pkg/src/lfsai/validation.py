"""Input validation helpers for the estimator API."""

from __future__ import annotations

from .errors import FrameError
from .io import LightFieldFrame
from .rig import CameraRig


def check_frame(frame) -> LightFieldFrame:
    """Validate an estimator input frame.

    Raises:
        FrameError: not a LightFieldFrame or internally inconsistent.
    """
    if not isinstance(frame, LightFieldFrame):
        raise FrameError(
            f"expected a LightFieldFrame, got {type(frame).__name__}; "
            "load one with lfsai.io.load_frame or render one with lfsai.synth"
        )
    # Re-run the dataclass consistency checks in case arrays were swapped.
    LightFieldFrame(
        images=frame.images,
        prob_masks=frame.prob_masks,
        rig=frame.rig,
        frame_id=frame.frame_id,
        color_images=frame.color_images,
    )
    return frame


def check_rig(rig) -> CameraRig:
    if not isinstance(rig, CameraRig):
        raise FrameError(f"expected a CameraRig, got {type(rig).__name__}")
    return rig
