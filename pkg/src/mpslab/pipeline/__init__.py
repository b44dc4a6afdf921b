from .dataset import Dataset, ingest_dataset
from .runner import RunConfig, load_records, run_extraction
from .selection import consensus_correctness, intersect_by_fidelity, select_top_models
