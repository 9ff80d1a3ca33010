// Keyboard-to-control mapping with ramp dynamics: held keys ramp the
// channel toward its limit, release decays it back. Left and right held
// together cancel. The controller is pure state + update(dt), so tests can
// drive it with fake time.

export interface ControlValues {
  throttle: number;
  brake: number;
  steering: number;
}

export const THROTTLE_RAMP = 2.0; // per second toward 1 while held
export const RELEASE_DECAY = 4.0; // per second toward 0 on release
export const STEER_RAMP = 3.0; // per second toward +-1
export const CENTER_DECAY = 5.0; // per second toward 0

export interface KeyState {
  accelerate: boolean;
  brake: boolean;
  left: boolean;
  right: boolean;
}

export const DEFAULT_BINDINGS: Record<string, keyof KeyState> = {
  ArrowUp: "accelerate",
  KeyW: "accelerate",
  ArrowDown: "brake",
  KeyS: "brake",
  ArrowLeft: "left",
  KeyA: "left",
  ArrowRight: "right",
  KeyD: "right",
};

function toward(value: number, target: number, rate: number, dt: number): number {
  const step = rate * dt;
  if (value < target) return Math.min(target, value + step);
  if (value > target) return Math.max(target, value - step);
  return value;
}

export class KeyboardController {
  keys: KeyState = { accelerate: false, brake: false, left: false, right: false };
  values: ControlValues = { throttle: 0, brake: 0, steering: 0 };

  keyEvent(code: string, pressed: boolean): boolean {
    const channel = DEFAULT_BINDINGS[code];
    if (channel === undefined) return false;
    this.keys[channel] = pressed;
    return true;
  }

  update(dt: number): ControlValues {
    const v = this.values;
    v.throttle = this.keys.accelerate
      ? toward(v.throttle, 1, THROTTLE_RAMP, dt)
      : toward(v.throttle, 0, RELEASE_DECAY, dt);
    v.brake = this.keys.brake
      ? toward(v.brake, 1, THROTTLE_RAMP, dt)
      : toward(v.brake, 0, RELEASE_DECAY, dt);
    const left = this.keys.left;
    const right = this.keys.right;
    if (left === right) {
      // none or both: self-center (cancellation)
      v.steering = toward(v.steering, 0, CENTER_DECAY, dt);
    } else if (right) {
      v.steering = toward(v.steering, 1, STEER_RAMP, dt);
    } else {
      v.steering = toward(v.steering, -1, STEER_RAMP, dt);
    }
    return { ...v };
  }
}

export interface InputLoopOptions {
  rateHz?: number; // emission rate, at least 30
  now?: () => number; // injectable clock (ms)
  schedule?: (fn: () => void, ms: number) => unknown;
}

// Drives a KeyboardController at a fixed rate and hands each sample to
// `emit`. Key events take effect at the next tick, which at >= 30 Hz keeps
// press-to-emission latency well under 50 ms.
export class InputLoop {
  readonly controller = new KeyboardController();
  private readonly rateHz: number;
  private readonly now: () => number;
  private readonly schedule: (fn: () => void, ms: number) => unknown;
  private last = 0;
  private running = false;

  constructor(
    private readonly emit: (values: ControlValues) => void,
    options: InputLoopOptions = {}
  ) {
    this.rateHz = Math.max(30, options.rateHz ?? 60);
    this.now = options.now ?? (() => performance.now());
    this.schedule = options.schedule ?? ((fn, ms) => setTimeout(fn, ms));
  }

  start(): void {
    if (this.running) return;
    this.running = true;
    this.last = this.now();
    const tick = () => {
      if (!this.running) return;
      const t = this.now();
      const dt = Math.min(0.1, Math.max(0, (t - this.last) / 1000));
      this.last = t;
      this.emit(this.controller.update(dt));
      this.schedule(tick, 1000 / this.rateHz);
    };
    this.schedule(tick, 1000 / this.rateHz);
  }

  stop(): void {
    this.running = false;
  }
}
