"""Egocentric activity labeling: optical-flow histograms, NMF features, graph MBO."""
from .errors import EgographError, StageError
from .evaluation import EvaluationReport, emit_confusion_matrix, emit_segment_plot, evaluate
from .flow_field import FlowField, FlowParams, Frame, compute_flow, read_flo, synth_flow, write_flo
from .graph_spectrum import (ScaleParams, Spectrum, SpectrumParams, compute_spectrum,
                             dense_spectrum, nystrom_spectrum)
from .mbo_classifier import (LabelData, MboParams, MboResult, classify_batched, diffuse, energy,
                             initialize, mbo_classify, sample_fidelity, threshold)
from .motion_descriptor import DescriptorConfig, build_descriptor_matrix, segment_histogram
from .pipeline import load_config, run_pipeline
from .reduction import NmfFactors, nmf, project_nnls, smooth

__version__ = "0.1.0"
