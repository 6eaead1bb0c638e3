// Heatmap view model: which cells are clickable and how they render.

import { BACKGROUND, type ConfusionResponse, type TargetCell } from "./types.js";

export interface CellView {
  row: number;
  col: number;
  truth: string;
  predicted: string;
  value: number;
  clickable: boolean; // off-diagonal vehicle pairs only
  selected: boolean;
  intensity: number; // 0..1 for the color scale
}

export function cellViews(confusion: ConfusionResponse, target: TargetCell | null): CellView[] {
  const order = confusion.class_order;
  const max = Math.max(1e-9, ...confusion.matrix.flat());
  const cells: CellView[] = [];
  for (let i = 0; i < order.length; i++) {
    for (let j = 0; j < order.length; j++) {
      const truth = order[i];
      const predicted = order[j];
      const clickable = i !== j && truth !== BACKGROUND && predicted !== BACKGROUND;
      cells.push({
        row: i,
        col: j,
        truth,
        predicted,
        value: confusion.matrix[i][j],
        clickable,
        selected: target !== null && target.source === truth && target.predicted === predicted,
        intensity: confusion.matrix[i][j] / max,
      });
    }
  }
  return cells;
}

export function heatColor(intensity: number): string {
  // Dark blue to bright yellow ramp.
  const t = Math.max(0, Math.min(1, intensity));
  const r = Math.round(40 + 215 * t);
  const g = Math.round(40 + 180 * t);
  const b = Math.round(90 - 60 * t);
  return `rgb(${r},${g},${b})`;
}
