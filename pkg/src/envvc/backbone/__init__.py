from envvc.backbone.adapter import ContentAdapter
from envvc.backbone.loss import diffusion_loss, dropout_masks
from envvc.backbone.rope import rope_apply
from envvc.backbone.schedule import NoiseSchedule, ScheduleError, add_noise, make_schedule
from envvc.backbone.unet import Backbone, SpeechConditioning, assemble_conditioning

__all__ = [
    "Backbone",
    "ContentAdapter",
    "NoiseSchedule",
    "ScheduleError",
    "SpeechConditioning",
    "add_noise",
    "assemble_conditioning",
    "diffusion_loss",
    "dropout_masks",
    "make_schedule",
    "rope_apply",
]
