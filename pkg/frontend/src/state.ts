// Client view state: a pure reducer over API snapshots and UI events.
// The UI owns no authoritative state; everything rebuilds from GETs.

import type { ModificationDraft, SessionResponse, Step } from "./types.js";

export interface ViewState {
  session: SessionResponse | null;
  selectedBin: number | null;
  draft: ModificationDraft;
  formErrors: { field: string; message: string }[];
  banner: string | null;
  stale: boolean; // a job finished since the last artifact fetch
}

export function emptyDraft(): ModificationDraft {
  return {
    target_class: "",
    action: "set_smoothness",
    value: 0.1,
    kind: "reinforcing",
    new_version_label: "",
    region_tags: [],
    face_indices: [],
    note: "",
  };
}

export function initialState(): ViewState {
  return {
    session: null,
    selectedBin: null,
    draft: emptyDraft(),
    formErrors: [],
    banner: null,
    stale: false,
  };
}

export type Event =
  | { kind: "snapshot"; session: SessionResponse }
  | { kind: "select_bin"; bin: number }
  | { kind: "edit_draft"; patch: Partial<ModificationDraft> }
  | { kind: "form_errors"; errors: { field: string; message: string }[] }
  | { kind: "banner"; message: string | null }
  | { kind: "suggestion_prefill"; draft: ModificationDraft };

export function reduce(state: ViewState, event: Event): ViewState {
  switch (event.kind) {
    case "snapshot": {
      const previous = state.session?.job;
      const current = event.session.job;
      const finished =
        previous?.state === "running" && current !== null && current.state !== "running";
      return { ...state, session: event.session, stale: state.stale || Boolean(finished) };
    }
    case "select_bin":
      return { ...state, selectedBin: event.bin };
    case "edit_draft":
      return { ...state, draft: { ...state.draft, ...event.patch }, formErrors: [] };
    case "form_errors":
      return { ...state, formErrors: event.errors };
    case "banner":
      return { ...state, banner: event.message };
    case "suggestion_prefill":
      return { ...state, draft: event.draft, formErrors: [] };
  }
}

export function currentStep(state: ViewState): Step | null {
  return state.session?.state?.step ?? null;
}

export function stepUnlocked(state: ViewState, step: Step): boolean {
  return currentStep(state) === step && !(state.session?.job?.state === "running");
}

// A selected suggestion pre-fills the modification form per its kind:
// common features invite disruption, unique features invite reinforcement.
export function draftFromSuggestion(
  suggestion: { kind: "common" | "unique"; owning_class: string },
  versionLabel: string,
  regionTags: string[],
): ModificationDraft {
  if (suggestion.kind === "common") {
    return {
      target_class: suggestion.owning_class,
      action: "scale_emission",
      value: 0.2,
      kind: "disruptive",
      new_version_label: versionLabel,
      region_tags: regionTags,
      face_indices: [],
      note: "disrupt common feature",
    };
  }
  return {
    target_class: suggestion.owning_class,
    action: "set_smoothness",
    value: 0.1,
    kind: "reinforcing",
    new_version_label: versionLabel,
    region_tags: regionTags,
    face_indices: [],
    note: "reinforce unique feature",
  };
}
