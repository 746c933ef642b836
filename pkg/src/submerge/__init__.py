"""submerge: a desk-scale lab for post-tokenization subtoken merging.

BPE inflates code sequences well past their lexeme count; this package studies
merging the subtoken vectors of each lexeme back into one position inside a
small Transformer, trading a little accuracy for quadratic-attention savings.
Everything runs on numpy with an optional compiled kernel core.
"""

__version__ = "0.1.0"
