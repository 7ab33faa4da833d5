// Instanced-cube voxel renderer with per-label colors and anchor highlight.

import * as THREE from "three";
import { OrbitControls } from "three/addons/controls/OrbitControls.js";
import type { LabeledVolume } from "./voxb";

const PART_COLORS = [0x4878cf, 0xee854a, 0x6acc65, 0xd65f5f, 0x956cb4, 0x8c613c];
const ANCHOR_COLOR = 0xff69b4; // anchor parts render pink

export interface PickResult {
  label: number; // 1-based label id
}

export class VoxelRenderer {
  private readonly scene = new THREE.Scene();
  private readonly camera: THREE.PerspectiveCamera;
  private readonly renderer: THREE.WebGLRenderer;
  private readonly controls: OrbitControls;
  private readonly raycaster = new THREE.Raycaster();
  private mesh: THREE.InstancedMesh | null = null;
  private instanceLabels: Uint8Array = new Uint8Array(0);

  constructor(private readonly canvas: HTMLCanvasElement) {
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.renderer.setPixelRatio(window.devicePixelRatio);
    this.scene.background = new THREE.Color(0x16181d);
    this.camera = new THREE.PerspectiveCamera(45, 1, 0.1, 1000);
    this.controls = new OrbitControls(this.camera, canvas);
    this.controls.enableDamping = true;
    const key = new THREE.DirectionalLight(0xffffff, 2.2);
    key.position.set(1, 2, 1.5);
    this.scene.add(key);
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.55));
    const loop = () => {
      this.controls.update();
      this.renderer.render(this.scene, this.camera);
      requestAnimationFrame(loop);
    };
    requestAnimationFrame(loop);
  }

  resize(width: number, height: number): void {
    this.renderer.setSize(width, height, false);
    this.camera.aspect = width / height;
    this.camera.updateProjectionMatrix();
  }

  setVolume(vol: LabeledVolume, anchorLabel: number): void {
    if (this.mesh) {
      this.scene.remove(this.mesh);
      this.mesh.geometry.dispose();
      (this.mesh.material as THREE.Material).dispose();
      this.mesh = null;
    }
    const r = vol.resolution;
    let count = 0;
    for (const v of vol.data) if (v > 0) count++;
    const geometry = new THREE.BoxGeometry(0.92, 0.92, 0.92);
    const material = new THREE.MeshLambertMaterial();
    const mesh = new THREE.InstancedMesh(geometry, material, Math.max(count, 1));
    this.instanceLabels = new Uint8Array(count);
    const matrix = new THREE.Matrix4();
    const color = new THREE.Color();
    const half = (r - 1) / 2;
    let i = 0;
    for (let x = 0; x < r; x++) {
      for (let y = 0; y < r; y++) {
        for (let z = 0; z < r; z++) {
          const label = vol.data[x * r * r + y * r + z];
          if (label === 0) continue;
          matrix.setPosition(x - half, y - half, z - half);
          mesh.setMatrixAt(i, matrix);
          const hex = label === anchorLabel
            ? ANCHOR_COLOR
            : PART_COLORS[(label - 1) % PART_COLORS.length];
          mesh.setColorAt(i, color.setHex(hex));
          this.instanceLabels[i] = label;
          i++;
        }
      }
    }
    mesh.count = count;
    mesh.instanceMatrix.needsUpdate = true;
    if (mesh.instanceColor) mesh.instanceColor.needsUpdate = true;
    this.scene.add(mesh);
    this.mesh = mesh;
    this.camera.position.set(r * 1.2, r * 0.9, r * 1.4);
    this.camera.lookAt(0, 0, 0);
    this.controls.target.set(0, 0, 0);
  }

  /** Raycast a pointer event to the clicked part label. */
  pick(event: PointerEvent): PickResult | null {
    if (!this.mesh) return null;
    const rect = this.canvas.getBoundingClientRect();
    const ndc = new THREE.Vector2(
      ((event.clientX - rect.left) / rect.width) * 2 - 1,
      -((event.clientY - rect.top) / rect.height) * 2 + 1,
    );
    this.raycaster.setFromCamera(ndc, this.camera);
    const hits = this.raycaster.intersectObject(this.mesh);
    if (!hits.length || hits[0].instanceId === undefined) return null;
    return { label: this.instanceLabels[hits[0].instanceId] };
  }
}
