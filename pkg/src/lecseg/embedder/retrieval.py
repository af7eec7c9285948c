"""Text-to-clip retrieval over learned embeddings."""

from __future__ import annotations

import numpy as np

from ..exceptions import ValidationError


def retrieve(query, clip_embeddings, clip_ids, top_k=10):
    """Rank clips by cosine similarity to ``query``.

    ``clip_ids`` holds one ``(lecture_id, clip_index)`` per embedding row.
    Ties are broken by ``(lecture_id, clip_index)`` ascending. Returns a
    list of ``((lecture_id, clip_index), score)`` of length
    ``min(top_k, n_clips)``.
    """
    if top_k < 1:
        raise ValidationError("top_k must be >= 1")
    clips = np.asarray(clip_embeddings, dtype=np.float64)
    if clips.ndim != 2 or clips.shape[0] == 0:
        raise ValidationError("no clips to rank")
    if len(clip_ids) != clips.shape[0]:
        raise ValidationError("one id per clip embedding required")
    q = np.asarray(query, dtype=np.float64)
    qn = np.linalg.norm(q)
    cn = np.linalg.norm(clips, axis=1)
    if qn == 0 or np.any(cn == 0):
        raise ValidationError("degenerate embedding")
    scores = np.clip(clips @ q / (cn * qn), -1.0, 1.0)
    order = sorted(range(len(clip_ids)), key=lambda i: (-scores[i], clip_ids[i][0], clip_ids[i][1]))
    return [((clip_ids[i][0], int(clip_ids[i][1])), float(scores[i])) for i in order[:top_k]]
