"""Evidence-based counterspeech engine for health misinformation.

Five cooperating agents retrieve static and dynamic evidence, summarize it,
generate a counterspeech draft, and refine it; a four-metric harness scores
the results. Every remote dependency sits behind a port with a deterministic
offline mock.
"""

__version__ = "0.1.0"
