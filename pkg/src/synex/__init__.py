"""synex: structured variable extraction from clinical notes with reflective revision.

Subsystems:
- schema: synoptic templates, per-round attribute records, the record store
- knowledge: markdown knowledge packages, section-granular retrieval
- prompts: prompt rendering and robust parsing of model JSON replies
- backends: chat-completion backends (HTTP, scripted, repair simulator)
- engine: one-by-one baseline pass and the reflective revision loop
- constraints: declarative interdependence rules and violation detection
- staging: deterministic AJCC7 lung T/N/M classification and stage groups
- metrics: confusion matrices, weighted scores, numeric error rates, CIs
- cli: command-line entry point
"""

__version__ = "0.1.0"
