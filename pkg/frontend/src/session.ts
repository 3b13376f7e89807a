/** Chat session state: append-only turns plus the current settings. */

import type { ContextItem, QuerySettings } from "./api.js";

export interface Turn {
  question: string;
  answer: string | null;
  contexts: ContextItem[];
  entitiesUsed: number | null;
  latencySeconds: number | null;
  settings: QuerySettings;
  error: string | null;
}

export const DEFAULT_SETTINGS: QuerySettings = {
  topK: 5,
  useGraph: true,
  generator: "mock-echo",
};

export function canSubmit(question: string): boolean {
  return question.trim().length > 0;
}

/**
 * Turns are append-only; settings edits apply to subsequent turns only
 * (each turn snapshots the settings it was asked with).
 */
export class Session {
  private readonly turnList: Turn[] = [];
  private currentSettings: QuerySettings;

  constructor(settings: QuerySettings = DEFAULT_SETTINGS) {
    this.currentSettings = { ...settings };
  }

  get turns(): readonly Turn[] {
    return this.turnList;
  }

  get settings(): QuerySettings {
    return { ...this.currentSettings };
  }

  updateSettings(patch: Partial<QuerySettings>): QuerySettings {
    this.currentSettings = { ...this.currentSettings, ...patch };
    return this.settings;
  }

  addTurn(turn: Omit<Turn, "settings">): Turn {
    const recorded: Turn = { ...turn, settings: this.settings };
    this.turnList.push(recorded);
    return recorded;
  }
}
