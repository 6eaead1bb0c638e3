// Run timeline: version lineage with per-seed and mean scores.

import type { MetricsResponse, VersionMetrics } from "./types.js";

export interface TimelineNode {
  version: string;
  parent: string | null;
  depth: number;
  meanLabel: string; // formatted like table rows, one decimal percent
  perSeed: { seed: string; map50: number }[];
  specSummaries: string[];
  failed: boolean;
}

export function formatMeanMap50(value: number | null): string {
  if (value === null || Number.isNaN(value)) return "-";
  return `${(value * 100).toFixed(1)}%`;
}

export function specSummary(spec: {
  action: string;
  value: number;
  target_class: string;
  region_tags: string[];
  kind: string;
}): string {
  const region = spec.region_tags.join("+") || "faces";
  return `${spec.kind}: ${spec.action}(${spec.value}) on ${spec.target_class}.${region}`;
}

export function buildTimeline(metrics: MetricsResponse): TimelineNode[] {
  const byVersion = new Map<string, VersionMetrics>();
  for (const v of metrics.versions) byVersion.set(v.version, v);

  const depth = (v: VersionMetrics): number => {
    let d = 0;
    let parent = v.parent;
    while (parent) {
      d += 1;
      parent = byVersion.get(parent)?.parent ?? null;
    }
    return d;
  };

  const nodes = metrics.versions.map((v) => ({
    version: v.version,
    parent: v.parent,
    depth: depth(v),
    meanLabel: formatMeanMap50(v.mean_map50),
    perSeed: Object.entries(v.per_seed_map50)
      .map(([seed, map50]) => ({ seed, map50 }))
      .sort((a, b) => a.seed.localeCompare(b.seed)),
    specSummaries: v.specs.map(specSummary),
    failed: false,
  }));
  nodes.sort((a, b) => a.depth - b.depth || a.version.localeCompare(b.version));
  return nodes;
}
