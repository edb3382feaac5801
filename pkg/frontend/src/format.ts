/** Display-only formatting. Values pass through untouched except for rounding. */

export function fmt(value: number | null | undefined, digits = 3): string {
  if (value === null || value === undefined) return "—";
  return value.toFixed(digits);
}

export function fmtExp(value: number | null | undefined): string {
  if (value === null || value === undefined) return "—";
  if (value !== 0 && Math.abs(value) < 0.001) return value.toExponential(2);
  return value.toFixed(3);
}

/** Member key like "p17/d2" for row labels and tables. */
export function memberLabel(playerId: number, day: number): string {
  return `p${playerId}/d${day}`;
}
