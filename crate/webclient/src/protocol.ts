// Wire types for the session socket. One JSON object per line (raw TCP) or
// per WebSocket text frame.

export type Condition = "SIMVIEWS" | "BASE";
export type Pattern = "active_speaking" | "passive_speaking" | "active_listening" | "passive_listening";
export type Origin = "user_initiated" | "agent_to_user" | "agent_to_agent";
export type TurnKind = "opening" | "join" | "follow_up" | "response";
export type Provenance = "scripted" | "generated" | "fallback";

export type ClientMessage =
  | { type: "Hello"; name?: string }
  | { type: "Move"; x: number; y: number }
  | { type: "Say"; target?: string; episode?: string; text: string }
  | { type: "Join"; episode: string; text: string }
  | { type: "Inspect"; agent: string }
  | { type: "Bye" };

export interface AgentState {
  agent_id: string;
  role: "visitor" | "guide";
  x: number;
  y: number;
  heading: number;
  node: string;
  cue: string;
  avatar: { gender: "Female" | "Male"; appearance_seed: number };
  voice_id: string;
  label_visible: boolean;
  identity_label?: string;
  episode?: string;
}

export interface EpisodeSummary {
  id: string;
  origin: Origin;
  participants: string[];
  pattern: Pattern;
  turns: number;
  open: boolean;
}

export interface EntityState {
  entity: string;
  x: number;
  y: number;
  heading: number;
  speed: number;
}

export interface Snapshot {
  session_id: string;
  tick: number;
  condition: Condition;
  exhibit_id: string;
  exhibit_title: string;
  user?: EntityState;
  agents: AgentState[];
  episodes: EpisodeSummary[];
}

export interface LogEvent {
  seq: number;
  tick: number;
  wall_time: string;
  type:
    | "SessionStarted"
    | "AgentSpawned"
    | "PoseUpdated"
    | "EpisodeOpened"
    | "TurnAdded"
    | "PatternChanged"
    | "EpisodeClosed"
    | "LabelRevealed"
    | "ThinkingStarted"
    | "ClientMessage"
    | "Warning";
  payload: Record<string, unknown>;
}

export type ServerMessage =
  | { type: "Snapshot"; snapshot: Snapshot }
  | { type: "Event"; event: LogEvent }
  | { type: "Error"; code: string; message: string };
