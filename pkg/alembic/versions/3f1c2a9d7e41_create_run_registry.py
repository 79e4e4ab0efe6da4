"""create run registry

Revision ID: 3f1c2a9d7e41
Revises: 
Create Date: 2026-10-02 14:08:51.204117

"""
from typing import Sequence, Union

from alembic import op
import sqlalchemy as sa


# revision identifiers, used by Alembic.
revision: str = '3f1c2a9d7e41'
down_revision: Union[str, Sequence[str], None] = None
branch_labels: Union[str, Sequence[str], None] = None
depends_on: Union[str, Sequence[str], None] = None


def upgrade() -> None:
    """Upgrade schema."""
    # ### commands auto generated by Alembic - please adjust! ###
    op.create_table('training_runs',
    sa.Column('id', sa.Integer(), nullable=False),
    sa.Column('run_key', sa.String(length=96), nullable=False),
    sa.Column('status', sa.String(length=20), nullable=False),
    sa.Column('fold', sa.Integer(), nullable=False),
    sa.Column('rng_seed', sa.Integer(), nullable=False),
    sa.Column('config_digest', sa.String(length=64), nullable=False),
    sa.Column('config_json', sa.Text(), nullable=False),
    sa.Column('best_epoch', sa.Integer(), nullable=True),
    sa.Column('best_val_hit1', sa.Float(), nullable=True),
    sa.Column('test_metrics_json', sa.Text(), nullable=True),
    sa.Column('checkpoint_path', sa.String(length=512), nullable=True),
    sa.Column('error', sa.Text(), nullable=True),
    sa.Column('created_at', sa.DateTime(), nullable=False),
    sa.Column('finished_at', sa.DateTime(), nullable=True),
    sa.PrimaryKeyConstraint('id')
    )
    op.create_index(op.f('ix_training_runs_run_key'), 'training_runs', ['run_key'], unique=False)
    op.create_index(op.f('ix_training_runs_config_digest'), 'training_runs', ['config_digest'], unique=False)
    op.create_table('epoch_metrics',
    sa.Column('id', sa.Integer(), nullable=False),
    sa.Column('run_id', sa.Integer(), nullable=False),
    sa.Column('epoch', sa.Integer(), nullable=False),
    sa.Column('loss', sa.Float(), nullable=True),
    sa.Column('val_hit1', sa.Float(), nullable=True),
    sa.Column('n_pseudo', sa.Integer(), nullable=False),
    sa.ForeignKeyConstraint(['run_id'], ['training_runs.id'], ),
    sa.PrimaryKeyConstraint('id'),
    sa.UniqueConstraint('run_id', 'epoch', name='uq_epoch_metrics_run_epoch')
    )
    op.create_index(op.f('ix_epoch_metrics_run_id'), 'epoch_metrics', ['run_id'], unique=False)
    op.create_table('pseudo_seed_admissions',
    sa.Column('id', sa.Integer(), nullable=False),
    sa.Column('run_id', sa.Integer(), nullable=False),
    sa.Column('epoch', sa.Integer(), nullable=False),
    sa.Column('kg1_id', sa.Integer(), nullable=False),
    sa.Column('kg2_id', sa.Integer(), nullable=False),
    sa.Column('similarity', sa.Float(), nullable=False),
    sa.ForeignKeyConstraint(['run_id'], ['training_runs.id'], ),
    sa.PrimaryKeyConstraint('id')
    )
    op.create_index(op.f('ix_pseudo_seed_admissions_run_id'), 'pseudo_seed_admissions', ['run_id'], unique=False)
    # ### end Alembic commands ###


def downgrade() -> None:
    """Downgrade schema."""
    # ### commands auto generated by Alembic - please adjust! ###
    op.drop_index(op.f('ix_pseudo_seed_admissions_run_id'), table_name='pseudo_seed_admissions')
    op.drop_table('pseudo_seed_admissions')
    op.drop_index(op.f('ix_epoch_metrics_run_id'), table_name='epoch_metrics')
    op.drop_table('epoch_metrics')
    op.drop_index(op.f('ix_training_runs_config_digest'), table_name='training_runs')
    op.drop_index(op.f('ix_training_runs_run_key'), table_name='training_runs')
    op.drop_table('training_runs')
    # ### end Alembic commands ###
