"""flashlive: a hardware-free screen-flash liveness detection laboratory."""

from .challenges import (
    BELT_HEIGHT,
    PALETTE,
    Challenge,
    ChallengeKind,
    ChallengePlan,
    generate,
    guess_probability,
)
from .optics import (
    FaceScene,
    FormFactors,
    Illuminant,
    ReflectanceMap,
    ViewGeometry,
    irradiance_at,
    midterm_result,
    reflect,
)
from .scanline import (
    CameraTimeline,
    Frame,
    RoiLocation,
    ScreenTimeline,
    capture,
    decode_trace,
    encode_trace,
    lighting_area_start,
    make_camera_timeline,
    make_screen_timeline,
    read_trace,
    roi_locate,
    write_trace,
)
from .scenes import SCREEN_PRESETS, ScreenPreset, make_face_scene, make_flat_scene

__version__ = "0.1.0"
