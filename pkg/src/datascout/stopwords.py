"""Fixed English stop-word list used by word-distribution analysis.

The list is frozen on purpose: word distributions feed report determinism
checks, so it must not drift with an external dependency's releases.
"""

STOP_WORDS = frozenset({
    "about", "above", "after", "again", "against", "all", "also", "and", "any",
    "are", "aren", "back", "because", "been", "before", "being", "below",
    "between", "both", "but", "can", "cannot", "could", "couldn", "did",
    "didn", "does", "doesn", "doing", "don", "down", "during", "each", "even",
    "few", "first", "for", "from", "further", "get", "got", "had", "hadn",
    "has", "hasn", "have", "haven", "having", "her", "here", "hers",
    "herself", "him", "himself", "his", "how", "however", "into", "isn",
    "its", "itself", "just", "last", "like", "made", "make", "many", "may",
    "might", "more", "most", "much", "must", "mustn", "myself", "new", "next",
    "nor", "not", "now", "off", "once", "one", "only", "onto", "other",
    "ought", "our", "ours", "ourselves", "out", "over", "own", "per", "same",
    "shan", "she", "should", "shouldn", "since", "some", "still", "such",
    "than", "that", "the", "their", "theirs", "them", "themselves", "then",
    "there", "these", "they", "this", "those", "through", "thus", "too",
    "under", "until", "upon", "use", "used", "using", "very", "was", "wasn",
    "were", "weren", "what", "when", "where", "which", "while", "who", "whom",
    "why", "will", "with", "within", "without", "won", "would", "wouldn",
    "yet", "you", "your", "yours", "yourself", "yourselves",
})
