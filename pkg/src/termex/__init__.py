"""termex: bilingual terminology span extraction from comparable corpora."""

from .autodiff import ParamStore, Tensor, no_grad
from .bpe import MergeTable, Vocab, apply_bpe, build_vocab, detokenize, learn_bpe
from .config import RunConfig
from .corpus import (
    LabeledExample,
    SyntheticWorldConfig,
    TermPair,
    build_examples,
    find_term_occurrences,
    gen_synthetic_world,
)
from .encoder import EncoderConfig, SegmentedInput
from .extractor import (
    ExtractorModel,
    SpanPrediction,
    build_concat_input,
    decode_span,
    extract,
    fuse_attn,
    init_extractor,
    span_logits,
    span_loss,
)
from .evaluate import EvalReport, exact_match_precision, export_attention
from .optim import AdamState, adam_step, grad_check
from .pretrain import MaskingPolicy, make_tlm_pair, mask_tokens, mlm_loss

__version__ = "0.1.0"
