from dataclasses import asdict, dataclass

from ..errors import ContractError


@dataclass(frozen=True)
class NetworkConfig:
    levels: int = 4
    blocks_per_level: tuple = (4, 6, 6, 8)
    heads_per_level: tuple = (1, 2, 4, 8)
    base_channels: int = 48
    window: int = 8
    shift: int = 4
    mlp_ratio: float = 2.0
    refinement_blocks: int = 4
    num_exposures: int = 3

    def __post_init__(self):
        object.__setattr__(self, "blocks_per_level", tuple(int(b) for b in self.blocks_per_level))
        object.__setattr__(self, "heads_per_level", tuple(int(h) for h in self.heads_per_level))
        problems = []
        if self.levels < 1:
            problems.append(f"levels >= 1 (got {self.levels})")
        if len(self.blocks_per_level) != self.levels:
            problems.append(f"len(blocks_per_level) == levels ({len(self.blocks_per_level)} != {self.levels})")
        if len(self.heads_per_level) != self.levels:
            problems.append(f"len(heads_per_level) == levels ({len(self.heads_per_level)} != {self.levels})")
        if self.base_channels < 1 or (self.levels > 1 and self.base_channels % 2):
            problems.append(f"base_channels positive and even (got {self.base_channels})")
        for lvl, heads in enumerate(self.heads_per_level):
            width = self.channels(lvl)
            if heads < 1 or width % heads:
                problems.append(f"channels at level {lvl} ({width}) divisible by heads ({heads})")
        if self.window < 1:
            problems.append(f"window >= 1 (got {self.window})")
        if not 0 <= self.shift < self.window:
            problems.append(f"0 <= shift < window (got shift={self.shift}, window={self.window})")
        if self.mlp_ratio <= 0:
            problems.append(f"mlp_ratio > 0 (got {self.mlp_ratio})")
        if self.refinement_blocks < 0:
            problems.append(f"refinement_blocks >= 0 (got {self.refinement_blocks})")
        if self.num_exposures < 1:
            problems.append(f"num_exposures >= 1 (got {self.num_exposures})")
        if problems:
            raise ContractError("invalid NetworkConfig: " + "; ".join(problems))

    def channels(self, level):
        return self.base_channels * 2 ** level

    def hidden(self, level):
        return int(self.channels(level) * self.mlp_ratio)

    @property
    def pad_multiple(self):
        return 2 ** (self.levels - 1) * self.window

    def to_dict(self):
        d = asdict(self)
        d["blocks_per_level"] = list(self.blocks_per_level)
        d["heads_per_level"] = list(self.heads_per_level)
        return d

    @classmethod
    def tiny(cls, **overrides):
        """Desk-scale configuration used by tests and the overfit preset."""
        base = dict(base_channels=8, blocks_per_level=(1, 1, 1, 1), heads_per_level=(1, 2, 4, 8))
        base.update(overrides)
        return cls(**base)
