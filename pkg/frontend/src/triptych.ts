// Saliency triptych view model: the three aligned overlays for one bin.

import type { Client } from "./api.js";
import type { SuggestionsResponse, TargetCell } from "./types.js";

export interface TriptychPanel {
  title: string;
  kind: "src_correct" | "dst_correct" | "misclass";
  imageUrl: string;
  caption: string;
}

export interface TriptychView {
  bin: number;
  panels: TriptychPanel[];
  suggestions: SuggestionsResponse["bins"][number]["suggestions"];
  warning: string | null;
}

export function availableBins(suggestions: SuggestionsResponse): number[] {
  return suggestions.bins.map((b) => b.bin).sort((a, b) => a - b);
}

export async function loadTriptych(
  client: Client,
  target: TargetCell,
  suggestions: SuggestionsResponse,
  bin: number,
): Promise<TriptychView> {
  const entry = suggestions.bins.find((b) => b.bin === bin);
  if (!entry) {
    return { bin, panels: [], suggestions: [], warning: suggestions.warning ?? "no data for this bin" };
  }
  const kinds: TriptychPanel["kind"][] = ["src_correct", "misclass", "dst_correct"];
  const titles: Record<TriptychPanel["kind"], string> = {
    src_correct: `${target.source} correct`,
    misclass: `${target.source} as ${target.predicted}`,
    dst_correct: `${target.predicted} correct`,
  };
  const panels: TriptychPanel[] = [];
  for (const kind of kinds) {
    const saliency = await client.getSaliency(target.source, target.predicted, bin, kind);
    const where = kind === "dst_correct" ? `bin ${saliency.dst_bin}` : `bin ${saliency.bin}`;
    panels.push({
      title: titles[kind],
      kind,
      imageUrl: client.imageUrl(saliency.image),
      caption: `${where}, corr ${saliency.correlation.toFixed(2)}`,
    });
  }
  return { bin, panels, suggestions: entry.suggestions, warning: suggestions.warning };
}
