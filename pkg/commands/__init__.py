from .commands import (
    ABLATION_VARIANTS,
    cmd_ablate,
    cmd_eval,
    cmd_gen_data,
    cmd_gradcheck,
    cmd_pretrain,
    cmd_route_report,
    cmd_train,
    variant_config,
    variant_overrides,
)

__all__ = [
    'ABLATION_VARIANTS',
    'cmd_ablate',
    'cmd_eval',
    'cmd_gen_data',
    'cmd_gradcheck',
    'cmd_pretrain',
    'cmd_route_report',
    'cmd_train',
    'variant_config',
    'variant_overrides',
]
