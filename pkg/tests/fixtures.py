"""Small shared datasets and configs for the slower tests."""

from transtagger.config import RunConfig
from transtagger.data import split
from transtagger.fusion import FusionConfig
from transtagger.synth import SynthConfig, gen_synthetic
from transtagger.textenc import EncoderConfig

TINY_SYNTH = SynthConfig(n_pois=6, n_themes=2, n_subthemes=3, posts_per_poi=12, keyword_prob=0.9, vocab_size=40)


def tiny_data(seed=0):
    pois, posts = gen_synthetic(SynthConfig(**{**TINY_SYNTH.__dict__, "seed": seed}))
    train, val, test = split(posts, (0.6, 0.2, 0.2), seed=seed)
    return pois, train, val, test


def tiny_config(variant="trans", epochs=2, **kw):
    return RunConfig(
        variant=variant,
        encoder=EncoderConfig(layers=1, heads=2, hidden=16, ff=16, dropout=0.1, max_len=24),
        fusion=FusionConfig(layers=1, heads=2, width=16, ff=16, dropout=0.1),
        lr=3e-3,
        batch_size=16,
        epochs=epochs,
        **kw,
    )
