from malcl.data.datasets import (
    BOOLEAN,
    REAL,
    LabeledDataset,
    load_tabular,
    read_cache,
    write_cache,
    write_csv,
    write_jsonlines,
)
from malcl.data.preprocessing import (
    IncrementalStandardizer,
    VarianceFilter,
    fit_variance_filter,
    standardizer_partial_update,
)
from malcl.data.scenarios import (
    CLASS_IL,
    DOMAIN_IL,
    SCENARIOS,
    TASK_IL,
    Task,
    TaskStream,
    build_class_il,
    build_domain_il,
    build_stream,
    build_task_il,
    order_classes,
)
from malcl.data.synthetic import SyntheticStreamConfig, generate_synthetic_stream

__all__ = [
    "BOOLEAN", "REAL", "LabeledDataset", "load_tabular", "read_cache", "write_cache",
    "write_csv", "write_jsonlines", "IncrementalStandardizer", "VarianceFilter",
    "fit_variance_filter", "standardizer_partial_update", "CLASS_IL", "DOMAIN_IL",
    "SCENARIOS", "TASK_IL", "Task", "TaskStream", "build_class_il", "build_domain_il",
    "build_stream", "build_task_il", "order_classes", "SyntheticStreamConfig",
    "generate_synthetic_stream",
]
