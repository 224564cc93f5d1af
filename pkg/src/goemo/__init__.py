"""Multi-label emotion classification on GoEmotions-format data.

Modules: ``corpus`` (ingestion and statistics), ``textprep``
(normalisation, tokenisation, vocabularies), ``features`` (TF-IDF,
word vectors, summary vectors), ``autodiff`` (reverse-mode gradients and
Adam), ``imbalance`` (class weights, weighted BCE and focal loss),
``linear`` (binary-relevance logistic regression), ``bilstm``
(BiLSTM with attention and a dense head), ``evaluation`` (metrics,
thresholds, reports) and ``cli``.
"""

__version__ = "0.1.0"
