from dataclasses import dataclass

from sklearn.model_selection import KFold


@dataclass(frozen=True)
class FoldSplit:
    """Maps each volume id to the fold in which it is held out for validation."""

    assignments: dict
    k: int

    def validation_ids(self, fold):
        return [vid for vid, f in self.assignments.items() if f == fold]

    def training_ids(self, fold):
        return [vid for vid, f in self.assignments.items() if f != fold]

    def sizes(self):
        return [sum(1 for f in self.assignments.values() if f == i) for i in range(self.k)]


def split_folds(ids, k=5, seed=0):
    """Shuffle ``ids`` deterministically and partition them into ``k`` folds."""
    ids = list(ids)
    if len(ids) < k:
        raise ValueError(f"need at least {k} volumes for {k}-fold splitting, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ValueError("volume ids must be unique")
    kfold = KFold(n_splits=k, shuffle=True, random_state=seed)
    assignments = {}
    for fold, (_, held_out) in enumerate(kfold.split(ids)):
        for i in held_out:
            assignments[ids[i]] = fold
    return FoldSplit({vid: assignments[vid] for vid in ids}, k)
