"""Symbolic knowledge-graph VQA toolkit: image-specific knowledge graphs, a
six-primitive query language with an exact executor, constrained question
generation, and answer/explanation evaluation."""

__version__ = "0.1.0"

from .executor import (AnswerReport, CrossProductLimitError, ExecError, ExecResult, GroundingMode,
                       LayoutTypeError, TraceStep, UnknownEntryError, answer, execute,
                       execute_grounded, justify, run)
from .kgraph import (Entry, EntryTable, ImageKnowledgeGraph, IngestError, IngestReport, Kind,
                     KnowledgeBase, SceneGraph, Scope, Source, Triplet, load_bundle,
                     load_knowledge_base, load_scene_graphs, lookup, merge, normalize, save_bundle)
from .query import (AmbiguousQuestion, Apply, Leaf, LexError, ParseError, QueryError, QuerySymbol,
                    UnparseableQuestion, parse_layout, parse_question, parse_shift_reduce,
                    serialize, tokenize)
from .templates import Lexicon, Template, TemplateError, TemplateSet, default_templates, load_templates
from .qgen import (ConstraintLedger, GenerationConfig, QARecord, RejectReason, apply_constraints,
                   assign_splits, audit_constraints, dataset_stats, generate, instantiate,
                   sample_chains, validate)
from .evaluation import (EvalReport, Prediction, evaluate, explanation_score, oracle_predictions,
                         qtype_mode_baseline, score_answers, score_explanations, triplets_from_trace)
