// Client-side view model. Rendering is a pure function of the message stream.

import type { ClientMessage, Condition, Pattern, ServerMessage, Snapshot } from "./protocol";

export interface TranscriptEntry {
  speaker: string;
  // Identity label, present only once a LabelRevealed event arrived for the speaker.
  label?: string;
  text: string;
  kind: string;
}

export interface ViewState {
  snapshot: Snapshot | null;
  transcript: Record<string, TranscriptEntry[]>;
  focusedEpisode: string | null;
  patternBadge: Pattern | null;
  condition: Condition | null;
  revealed: Record<string, string>;
}

export type UserInput =
  | { kind: "click"; x: number; y: number }
  | { kind: "type"; text: string; agent?: string; episode?: string }
  | { kind: "join"; episode: string; text: string }
  | { kind: "hover"; agent: string };

export interface LiveView {
  state(): ViewState;
  act(input: UserInput): ClientMessage | null;
  close(): void;
}

export type Reducer = (state: ViewState, msg: ServerMessage) => ViewState;

export declare function connect(url: string, onChange: (s: ViewState) => void): Promise<LiveView>;
export declare function replay(ndjson: string): ViewState;
