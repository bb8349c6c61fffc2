/* tslint:disable */
/* eslint-disable */

export class Session {
    free(): void;
    [Symbol.dispose](): void;
    cyclesDone(): number;
    /**
     * JSON metrics over the validation split.
     */
    metrics(ensemble: boolean): string;
    constructor(seed: bigint, count: number, width: number, modes: number, cycle_length: number);
    /**
     * JSON array of epoch records.
     */
    trainCycle(): string;
    valLen(): number;
    /**
     * JSON view of one validation scenario with predictions.
     */
    view(index: number, ensemble: boolean): string;
}

export function dytCurve(alpha: number, gamma: number, beta: number, x_min: number, x_max: number, points: number): Float64Array;

export function lrCurve(eta_min: number, eta_max: number, cycle_length: number, num_cycles: number, per_epoch: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_session_free: (a: number, b: number) => void;
    readonly dytCurve: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly lrCurve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly session_cyclesDone: (a: number) => number;
    readonly session_metrics: (a: number, b: number) => [number, number, number, number];
    readonly session_new: (a: bigint, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly session_trainCycle: (a: number) => [number, number, number, number];
    readonly session_valLen: (a: number) => number;
    readonly session_view: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
