"""Template backends: anything with ``apply(template_id, reactants) -> product``
that raises PreconditionFailed / ArityMismatch on failure.

``toy``    deterministic token-precondition rewrite rules
``oracle`` an external process speaking line-delimited JSON
"""
