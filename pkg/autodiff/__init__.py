from autodiff.value import Parameter, Value, backward, constant
from autodiff.ops import (
    FlopCounter,
    SegmentIndex,
    activation,
    add,
    add_bias,
    concat,
    count_flops,
    div_scalar,
    gather_rows,
    l2_norm,
    log_softmax,
    matmul,
    mul,
    reduce,
    reshape,
    scale,
    scale_rows,
    segment_softmax,
    segment_sum,
    total,
)
