/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_session_free: (a: number, b: number) => void;
export const dytCurve: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const lrCurve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const session_cyclesDone: (a: number) => number;
export const session_metrics: (a: number, b: number) => [number, number, number, number];
export const session_new: (a: bigint, b: number, c: number, d: number, e: number) => [number, number, number];
export const session_trainCycle: (a: number) => [number, number, number, number];
export const session_valLen: (a: number) => number;
export const session_view: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
