"""Human-value identification with a detector/LLM cascade."""

from .detector import DetectorSample, RelevanceEstimate, SamplingConfig, aggregate, parse_detector_response, sample_detector
from .gateway import ChatExchange, ChatRequest, MockBackend, OpenAIBackend, ReplayBackend, ReplayStore, count_tokens, request_digest
from .pipeline import CandidatePartition, FinalResult, PartitionConfig, finalize, identify, parse_final_response, partition
from .values import LabelVector, TextInstance, ValueDef, ValueSystem, load_value_system, render_plain_text, schwartz_system

__version__ = "0.1.0"
