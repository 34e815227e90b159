"""Agents: a latent tracker plus a fixed feedback controller.

Agents only ever see bundles. Corruption labels and hidden states stay in
the episode runner.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..env import Controller
from ..rejection import GateConfig, GateDecision, GateState, Verdict, gate_step
from ..selection import SelectionConfig, brute_force_select, select_representation
from ..sensors import ObservationBundle
from ..worldmodel.model import GaussianBelief, WorldModel, kl_surprise, posterior, prior, sequence_step

AGENTS = ("base", "augmented", "confident_representation", "rejection_gate", "brute_force")


@dataclass
class StepInfo:
    z: np.ndarray
    h: np.ndarray
    surprise: float  # full-bundle surprise at the agent's context
    masked: tuple | None = None  # chosen mask, selection agents only
    verdict: Verdict | None = None  # gate agent only
    decision: GateDecision | None = None


class Agent:
    name = "agent"

    def __init__(self, model: WorldModel, controller: Controller):
        self.model = model
        self.controller = controller
        self.reset()

    def reset(self) -> None:
        self.h = None
        self.z = None
        self.a = None

    def advance(self) -> np.ndarray:
        if self.z is None:
            return self.model.h0
        return sequence_step(self.model, self.h, self.z, self.a)

    def infer(self, h: np.ndarray, bundle: ObservationBundle) -> StepInfo:
        q = posterior(self.model, h, bundle)
        return StepInfo(q.mean, h, kl_surprise(q, prior(self.model, h)))

    def act(self, bundle: ObservationBundle) -> tuple[np.ndarray, StepInfo]:
        info = self.infer(self.advance(), bundle)
        self.h, self.z = info.h, info.z
        self.a = self.controller(info.z)
        return self.a, info


class BaseAgent(Agent):
    name = "base"


class ConfidentRepresentationAgent(Agent):
    name = "confident_representation"

    def __init__(self, model, controller, selection: SelectionConfig | None = None):
        self.selection = selection or SelectionConfig()
        super().__init__(model, controller)

    def select(self, h, bundle):
        return select_representation(self.model, h, bundle, self.selection)

    def infer(self, h, bundle):
        res = self.select(h, bundle)
        full = next(e for e in res.surprise_ledger if e.mask.n_masked == 0)
        return StepInfo(res.chosen_z, h, full.surprise, masked=res.chosen_mask.masked)


class BruteForceAgent(ConfidentRepresentationAgent):
    name = "brute_force"

    def select(self, h, bundle):
        return brute_force_select(self.model, h, bundle, self.selection.required_sensors)


class RejectionGateAgent(Agent):
    name = "rejection_gate"

    def __init__(self, model, controller, gate: GateConfig):
        self.gate = gate
        super().__init__(model, controller)

    def reset(self):
        super().reset()
        self.state = GateState.initial()

    def act(self, bundle):
        decision, self.state = gate_step(self.model, self.gate, self.state, bundle, self.a)
        q = posterior(self.model, decision.used_h, bundle)
        surprise = kl_surprise(q, prior(self.model, decision.used_h))
        info = StepInfo(decision.used_z, decision.used_h, surprise, verdict=decision.verdict, decision=decision)
        self.h, self.z = decision.used_h, decision.used_z
        self.a = self.controller(decision.used_z)
        return self.a, info


def make_agent(name: str, models: dict, controller: Controller, selection=None, gate=None) -> Agent:
    if name == "base":
        return BaseAgent(models["base"], controller)
    if name == "augmented":
        a = BaseAgent(models["augmented"], controller)
        a.name = "augmented"
        return a
    if name == "confident_representation":
        return ConfidentRepresentationAgent(models["dropout"], controller, selection)
    if name == "brute_force":
        return BruteForceAgent(models["dropout"], controller, selection)
    if name == "rejection_gate":
        if gate is None:
            raise ValueError("the rejection gate agent needs a calibrated GateConfig")
        return RejectionGateAgent(models["base"], controller, gate)
    raise ValueError(f"unknown agent {name!r}; expected one of {AGENTS}")
