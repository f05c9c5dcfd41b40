from envvc.encoders.clap import ToyCLAP, clap_embed_audio, clap_embed_text, info_nce, train_clap
from envvc.encoders.codec import latent_decode, latent_encode
from envvc.encoders.content import tokenize_content
from envvc.encoders.speaker import SpeakerNet, speaker_embed, train_speaker_encoder

__all__ = [
    "ToyCLAP",
    "SpeakerNet",
    "clap_embed_audio",
    "clap_embed_text",
    "info_nce",
    "latent_decode",
    "latent_encode",
    "speaker_embed",
    "tokenize_content",
    "train_clap",
    "train_speaker_encoder",
]
